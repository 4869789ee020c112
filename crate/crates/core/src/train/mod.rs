//! Trajectory collection across parallel environments and the PPO, A2C and
//! DDQN optimizers for the shared policy.

mod config;
mod ddqn;
mod gae;
mod onpolicy;
mod replay;
mod vecenv;

use std::collections::VecDeque;

use rand::Rng as _;
use thiserror::Error;

pub use config::{Algorithm, StopCriteria, TrainConfig};
pub use ddqn::{ddqn_targets, ddqn_update, epsilon_at, DdqnLearner};
pub use gae::compute_gae;
pub use onpolicy::{
    a2c_update, clip_grad_norm, clipped_surrogate, loss_and_gradient, normalize, ppo_update,
    surrogate_objective, PolicyBatch, Surrogate, Trajectory, Transition, UpdateStats,
};
pub use replay::{ReplayBuffer, ReplayItem};
pub use vecenv::{EnvStep, FinishedEpisode, VecEnv, WorldSetup};

use crate::net::{Adam, InputBatch, NetConfig, NetError, Network, PolicyAction, DISCRETE_ACTIONS};
use crate::reward::{RewardConfig, TerminalCause};
use crate::rng;
use crate::sim::{Action, SimConfig, SimError};
use crate::world::WorldError;

const TAG_INIT: u64 = 0x1;
const TAG_UPDATE: u64 = 0x2;
const TAG_REPLAY: u64 = 0x3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("DDQN requires the discrete action space")]
    ContinuousDdqn,
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error("gradient became non-finite")]
    NonFinite,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Everything `train_loop` needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub worlds: Vec<WorldSetup>,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub stop: StopCriteria,
    pub seed: u64,
}

impl TrainSetup {
    pub fn net_config(&self) -> NetConfig {
        NetConfig::for_beams(self.sim.lidar.beams, self.train.action_space)
    }

    /// The freshly initialized network this setup starts from.
    pub fn initial_network(&self) -> Result<Network<f32>, TrainError> {
        let mut r = rng::stream(self.seed, &[TAG_INIT]);
        Ok(Network::init(self.net_config(), &mut r)?)
    }
}

/// One line of the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based agent-episode counter.
    pub episode: u64,
    pub world: String,
    pub outcome: TerminalCause,
    pub steps: u32,
    pub sum_reward: f64,
    pub instance: usize,
    pub reset: u64,
    pub agent: usize,
    pub path_length: f64,
}

impl EpisodeRecord {
    pub const CSV_HEADER: &'static str = "episode,world,outcome,steps,sum_reward";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode,
            self.world,
            self.outcome.as_str(),
            self.steps,
            self.sum_reward
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: u64,
    pub episodes: u64,
    pub env_steps: u64,
    pub stats: UpdateStats,
    /// Success rate over the stop-criterion window (or everything seen so far).
    pub success_rate: f64,
    /// Mean episode return over the same window.
    pub mean_return: f64,
}

impl UpdateRecord {
    pub const CSV_HEADER: &'static str = "update,episodes,env_steps,samples,policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm,success_rate,mean_return";

    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.episodes,
            self.env_steps,
            s.samples,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.approx_kl,
            s.clip_fraction,
            s.grad_norm,
            self.success_rate,
            self.mean_return
        )
    }
}

pub enum TrainEvent<'a> {
    Episode(&'a EpisodeRecord),
    Update {
        record: &'a UpdateRecord,
        network: &'a Network<f32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpisodeBudget,
    SuccessThreshold,
    UpdateBudget,
    Observer,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub network: Network<f32>,
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateRecord>,
    pub stop: StopReason,
}

struct Progress<'o> {
    world_names: Vec<String>,
    stop: StopCriteria,
    episodes: Vec<EpisodeRecord>,
    updates: Vec<UpdateRecord>,
    env_steps: u64,
    window: VecDeque<(bool, f64)>,
    window_successes: usize,
    window_return: f64,
    observer: &'o mut dyn FnMut(TrainEvent<'_>) -> Control,
    reason: Option<StopReason>,
}

impl Progress<'_> {
    fn count(&self) -> u64 {
        self.episodes.len() as u64
    }

    fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window_successes as f64 / self.window.len() as f64
        }
    }

    fn mean_return(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window_return / self.window.len() as f64
        }
    }

    /// Checks the budgets that do not depend on a new episode.
    fn check_budgets(&mut self) -> bool {
        if self.reason.is_none() {
            if self.count() >= self.stop.max_episodes {
                self.reason = Some(StopReason::EpisodeBudget);
            } else if self.stop.max_updates.is_some_and(|m| self.updates.len() as u64 >= m) {
                self.reason = Some(StopReason::UpdateBudget);
            }
        }
        self.reason.is_some()
    }

    /// Logs finished episodes; returns true when training must stop.
    fn finish(&mut self, done: Vec<FinishedEpisode>) -> bool {
        for f in done {
            if self.reason.is_some() {
                break;
            }
            let rec = EpisodeRecord {
                episode: self.count() + 1,
                world: self.world_names[f.world].clone(),
                outcome: f.cause,
                steps: f.steps,
                sum_reward: f.total_reward,
                instance: f.instance,
                reset: f.reset,
                agent: f.agent,
                path_length: f.path_length,
            };
            let success = f.cause == TerminalCause::ReachedGoal;
            self.window.push_back((success, f.total_reward));
            self.window_successes += usize::from(success);
            self.window_return += f.total_reward;
            if self.window.len() > self.stop.success_window.max(1) {
                let (s, r) = self.window.pop_front().expect("non-empty");
                self.window_successes -= usize::from(s);
                self.window_return -= r;
            }
            if (self.observer)(TrainEvent::Episode(&rec)) == Control::Stop {
                self.reason = Some(StopReason::Observer);
            }
            self.episodes.push(rec);
            if let Some(th) = self.stop.success_threshold {
                if self.window.len() >= self.stop.success_window && self.success_rate() >= th {
                    self.reason.get_or_insert(StopReason::SuccessThreshold);
                }
            }
            self.check_budgets();
        }
        self.reason.is_some()
    }

    fn updated(&mut self, stats: UpdateStats, network: &Network<f32>) {
        let record = UpdateRecord {
            update: self.updates.len() as u64 + 1,
            episodes: self.count(),
            env_steps: self.env_steps,
            stats,
            success_rate: self.success_rate(),
            mean_return: self.mean_return(),
        };
        if (self.observer)(TrainEvent::Update {
            record: &record,
            network,
        }) == Control::Stop
        {
            self.reason.get_or_insert(StopReason::Observer);
        }
        self.updates.push(record);
    }
}

/// Trains without observing intermediate events.
pub fn train(setup: &TrainSetup) -> Result<TrainResult, TrainError> {
    train_loop(setup, &mut |_| Control::Continue)
}

/// Alternates rollouts across every environment instance with updates of
/// the shared network until a stop criterion fires.
pub fn train_loop(
    setup: &TrainSetup,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Control,
) -> Result<TrainResult, TrainError> {
    setup.train.validate()?;
    setup.sim.validate()?;
    setup.reward.validate().map_err(TrainError::Config)?;
    let net = setup.initial_network()?;
    let mut progress = Progress {
        world_names: setup.worlds.iter().map(|w| w.map.name().to_string()).collect(),
        stop: setup.stop.clone(),
        episodes: Vec::new(),
        updates: Vec::new(),
        env_steps: 0,
        window: VecDeque::new(),
        window_successes: 0,
        window_return: 0.0,
        observer,
        reason: None,
    };
    if progress.check_budgets() {
        return Ok(TrainResult {
            network: net,
            episodes: Vec::new(),
            updates: Vec::new(),
            stop: progress.reason.expect("checked"),
        });
    }
    let mut venv = VecEnv::new(&setup.worlds, &setup.sim, &setup.reward, setup.seed)?;
    let net = match setup.train.algorithm {
        Algorithm::Ppo | Algorithm::A2c => run_on_policy(setup, net, &mut venv, &mut progress)?,
        Algorithm::Ddqn => run_ddqn(setup, net, &mut venv, &mut progress)?,
    };
    Ok(TrainResult {
        network: net,
        stop: progress.reason.unwrap_or(StopReason::EpisodeBudget),
        episodes: progress.episodes,
        updates: progress.updates,
    })
}

fn run_on_policy(
    setup: &TrainSetup,
    mut net: Network<f32>,
    venv: &mut VecEnv,
    progress: &mut Progress<'_>,
) -> Result<Network<f32>, TrainError> {
    let cfg = &setup.train;
    let mut opt = Adam::new(net.params().len(), cfg.learning_rate());
    let mut update_rng = rng::stream(setup.seed, &[TAG_UPDATE]);
    while !progress.check_budgets() {
        let Some(trajectories) = collect_rollout(&net, venv, cfg, progress)? else {
            break;
        };
        let batch = PolicyBatch::from_trajectories(&net, &trajectories, cfg)?;
        let stats = match cfg.algorithm {
            Algorithm::Ppo => ppo_update(&mut net, &mut opt, &batch, cfg, &mut update_rng)?,
            _ => a2c_update(&mut net, &mut opt, &batch, cfg)?,
        };
        progress.updated(stats, &net);
    }
    Ok(net)
}

struct Pending {
    action: PolicyAction,
    log_prob: f64,
    value: f64,
}

/// Runs `t_max` vector steps with the current snapshot. Returns `None` if a
/// stop criterion fired mid-rollout.
fn collect_rollout(
    net: &Network<f32>,
    venv: &mut VecEnv,
    cfg: &TrainConfig,
    progress: &mut Progress<'_>,
) -> Result<Option<Vec<Trajectory>>, TrainError> {
    let gamma = cfg.discount();
    let mut slots: Vec<Vec<Trajectory>> = (0..venv.len())
        .map(|e| vec![Trajectory::default(); venv.agent_slots(e)])
        .collect();
    // (env, agent, step index, successor stack) of timed-out steps
    let mut timeouts = Vec::new();
    for _ in 0..cfg.t_max {
        let active = venv.active();
        let inputs = InputBatch::from_stacks(net.config(), active.iter().map(|&(e, a)| venv.stack(e, a)))?;
        let (out, _) = net.forward(&inputs)?;
        let mut actions: Vec<Vec<Option<Action>>> =
            (0..venv.len()).map(|e| vec![None; venv.agent_slots(e)]).collect();
        let mut pending: Vec<Vec<Option<Pending>>> =
            (0..venv.len()).map(|e| (0..venv.agent_slots(e)).map(|_| None).collect()).collect();
        for (row, &(e, a)) in active.iter().enumerate() {
            let (action, log_prob) = out.distribution(row).sample(venv.env_mut(e).policy_rng());
            actions[e][a] = Some(action.to_action());
            pending[e][a] = Some(Pending {
                action,
                log_prob,
                value: out.value[row] as f64,
            });
        }
        let stacks: Vec<_> = active.iter().map(|&(e, a)| venv.stack(e, a).clone()).collect();
        let results = venv.step(&actions)?;
        progress.env_steps += active.len() as u64;
        let mut stack_iter = stacks.into_iter();
        let mut finished = Vec::new();
        for (e, res) in results.into_iter().enumerate() {
            for o in res.outcomes {
                let p = pending[e][o.agent].take().expect("outcome for an agent that acted");
                let slot = &mut slots[e][o.agent];
                if o.status.cause() == Some(TerminalCause::TimedOut) {
                    timeouts.push((e, o.agent, slot.steps.len(), o.stack.clone()));
                }
                slot.steps.push(Transition {
                    stack: stack_iter.next().expect("one stack per active agent"),
                    action: p.action,
                    log_prob: p.log_prob,
                    value: p.value,
                    reward: o.reward,
                    done: o.done,
                    bootstrap: 0.0,
                });
            }
            finished.extend(res.finished);
        }
        if progress.finish(finished) {
            return Ok(None);
        }
    }
    // Values of successor states: open trajectory ends and timeouts.
    let open: Vec<(usize, usize)> = slots
        .iter()
        .enumerate()
        .flat_map(|(e, s)| {
            s.iter()
                .enumerate()
                .filter(|(_, t)| t.steps.last().is_some_and(|l| !l.done))
                .map(move |(a, _)| (e, a))
        })
        .collect();
    let mut inputs = InputBatch::from_stacks(net.config(), open.iter().map(|&(e, a)| venv.stack(e, a)))?;
    inputs.extend(&InputBatch::from_stacks(net.config(), timeouts.iter().map(|t| &t.3))?)?;
    if inputs.rows() > 0 {
        let (out, _) = net.forward(&inputs)?;
        for (row, &(e, a)) in open.iter().enumerate() {
            slots[e][a].last_value = out.value[row] as f64;
        }
        for (k, (e, a, i, _)) in timeouts.iter().enumerate() {
            slots[*e][*a].steps[*i].bootstrap = gamma * out.value[open.len() + k] as f64;
        }
    }
    Ok(Some(slots.into_iter().flatten().collect()))
}

fn run_ddqn(
    setup: &TrainSetup,
    net: Network<f32>,
    venv: &mut VecEnv,
    progress: &mut Progress<'_>,
) -> Result<Network<f32>, TrainError> {
    let cfg = &setup.train;
    let mut learner = DdqnLearner::new(net, cfg)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut sample_rng = rng::stream(setup.seed, &[TAG_REPLAY]);
    while !progress.check_budgets() {
        let eps = epsilon_at(progress.count(), setup.stop.max_episodes, cfg);
        let active = venv.active();
        let inputs =
            InputBatch::from_stacks(learner.online.config(), active.iter().map(|&(e, a)| venv.stack(e, a)))?;
        let (q, _) = learner.online.forward(&inputs)?;
        let mut actions: Vec<Vec<Option<Action>>> =
            (0..venv.len()).map(|e| vec![None; venv.agent_slots(e)]).collect();
        let mut chosen: Vec<Vec<usize>> = (0..venv.len()).map(|e| vec![0; venv.agent_slots(e)]).collect();
        for (row, &(e, a)) in active.iter().enumerate() {
            let r = venv.env_mut(e).policy_rng();
            let idx = if r.random::<f64>() < eps {
                r.random_range(0..DISCRETE_ACTIONS)
            } else {
                q.distribution(row).mode().index().expect("discrete head")
            };
            chosen[e][a] = idx;
            actions[e][a] = Some(crate::net::discretize_action(idx)?);
        }
        let stacks: Vec<_> = active.iter().map(|&(e, a)| venv.stack(e, a).clone()).collect();
        let results = venv.step(&actions)?;
        progress.env_steps += active.len() as u64;
        let mut stack_iter = stacks.into_iter();
        let mut finished = Vec::new();
        for (e, res) in results.into_iter().enumerate() {
            for o in res.outcomes {
                let timed_out = o.status.cause() == Some(TerminalCause::TimedOut);
                replay.push(ReplayItem {
                    stack: stack_iter.next().expect("one stack per active agent"),
                    action: chosen[e][o.agent],
                    reward: o.reward,
                    next: o.stack,
                    done: o.done && !timed_out,
                });
            }
            finished.extend(res.finished);
        }
        if progress.finish(finished) {
            break;
        }
        if replay.len() >= cfg.batch_size {
            let stats = learner.update(&replay, cfg, &mut sample_rng)?;
            progress.updated(stats, &learner.online);
        }
    }
    Ok(learner.online)
}
