//! Double DQN on the discrete head: the online network picks the next
//! action, the target network scores it.

use rand::Rng;

use super::onpolicy::{clip_grad_norm, UpdateStats};
use super::replay::{ReplayBuffer, ReplayItem};
use super::{TrainConfig, TrainError};
use crate::net::{ActionSpace, Adam, InputBatch, Network, OutputGrads, DISCRETE_ACTIONS};

/// `y = r + gamma * (1 - done) * Q_target(s', argmax_a Q_online(s', a))` per row.
pub fn ddqn_targets(
    rewards: &[f64],
    dones: &[bool],
    q_online_next: &[f64],
    q_target_next: &[f64],
    actions: usize,
    gamma: f64,
) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(i, (&r, &d))| {
            if d {
                return r;
            }
            let row = &q_online_next[i * actions..(i + 1) * actions];
            let mut best = 0;
            for (k, &q) in row.iter().enumerate() {
                if q > row[best] {
                    best = k;
                }
            }
            r + gamma * q_target_next[i * actions + best]
        })
        .collect()
}

/// Online and target networks plus the update counter that schedules copies.
#[derive(Debug, Clone)]
pub struct DdqnLearner {
    pub online: Network<f32>,
    target: Network<f32>,
    pub optimizer: Adam<f32>,
    updates: u64,
    target_update: u64,
}

impl DdqnLearner {
    pub fn new(online: Network<f32>, config: &TrainConfig) -> Result<Self, TrainError> {
        if online.config().action_space != ActionSpace::Discrete {
            return Err(TrainError::ContinuousDdqn);
        }
        let optimizer = Adam::new(online.params().len(), config.learning_rate());
        Ok(Self {
            target: online.clone(),
            online,
            optimizer,
            updates: 0,
            target_update: config.target_update,
        })
    }

    pub fn target(&self) -> &Network<f32> {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step on a uniformly sampled minibatch.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        replay: &ReplayBuffer<ReplayItem>,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<UpdateStats, TrainError> {
        if replay.len() < config.batch_size {
            return Err(TrainError::EmptyBatch);
        }
        let idx = replay.sample_indices(rng, config.batch_size);
        let items: Vec<&ReplayItem> = idx.iter().map(|&i| replay.get(i)).collect();
        let stats = ddqn_update(&mut self.online, &self.target, &mut self.optimizer, &items, config)?;
        self.updates += 1;
        if self.updates % self.target_update == 0 {
            self.target = self.online.clone();
        }
        Ok(stats)
    }
}

/// Squared-error step on the taken actions' Q-values.
pub fn ddqn_update(
    online: &mut Network<f32>,
    target: &Network<f32>,
    optimizer: &mut Adam<f32>,
    items: &[&ReplayItem],
    config: &TrainConfig,
) -> Result<UpdateStats, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if online.config().action_space != ActionSpace::Discrete {
        return Err(TrainError::ContinuousDdqn);
    }
    let a = DISCRETE_ACTIONS;
    let cfg = online.config().clone();
    let states = InputBatch::from_stacks(&cfg, items.iter().map(|t| &t.stack))?;
    let next = InputBatch::from_stacks(&cfg, items.iter().map(|t| &t.next))?;
    let (q, tape) = online.forward(&states)?;
    let (q_next_online, _) = online.forward(&next)?;
    let (q_next_target, _) = target.forward(&next)?;
    let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let rewards: Vec<f64> = items.iter().map(|t| t.reward).collect();
    let dones: Vec<bool> = items.iter().map(|t| t.done).collect();
    let y = ddqn_targets(
        &rewards,
        &dones,
        &f(&q_next_online.policy),
        &f(&q_next_target.policy),
        a,
        config.discount(),
    );
    let n = items.len() as f64;
    let mut og = OutputGrads::<f32>::zeros(&cfg, items.len());
    let mut loss = 0.0;
    for (r, t) in items.iter().enumerate() {
        let qa = q.policy[r * a + t.action] as f64;
        let err = qa - y[r];
        loss += err * err / n;
        og.policy[r * a + t.action] = (2.0 * err / n) as f32;
    }
    let mut grad = online.backward(&states, &tape, &og)?;
    let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
    if !norm.is_finite() {
        return Err(TrainError::NonFinite);
    }
    optimizer.step(online.params_mut(), &grad);
    Ok(UpdateStats {
        value_loss: loss,
        grad_norm: norm,
        samples: items.len(),
        ..UpdateStats::default()
    })
}

/// Linear epsilon schedule over the first `fraction` of the episode budget.
pub fn epsilon_at(episodes: u64, budget: u64, config: &TrainConfig) -> f64 {
    let horizon = (budget as f64 * config.epsilon_fraction).max(1.0);
    let t = episodes as f64 / horizon;
    if t >= 1.0 {
        return config.epsilon_end;
    }
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::net::NetConfig;
    use crate::sim::{Action, LidarScan, Observation, ObservationStack};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn target_examples() {
        let q_on = [0.0, 5.0, 1.0];
        let q_tg = [7.0, 2.0, 9.0];
        assert_eq!(ddqn_targets(&[0.3], &[true], &q_on, &q_tg, 3, 0.95), vec![0.3]);
        let y = ddqn_targets(&[0.0], &[false], &q_on, &q_tg, 3, 0.95);
        assert!((y[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::for_algorithm(super::super::Algorithm::Ddqn);
        assert_eq!(epsilon_at(0, 1000, &c), 1.0);
        assert!((epsilon_at(50, 1000, &c) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(100, 1000, &c), 0.05);
        assert_eq!(epsilon_at(900, 1000, &c), 0.05);
    }

    fn item(rng: &mut ChaCha8Rng) -> ReplayItem {
        let mut frame = || Observation {
            lidar: LidarScan {
                ranges: (0..8).map(|_| rng.random_range(0.5..20.0f32)).collect(),
            },
            goal_direction: Vec2::from_angle(rng.random_range(-3.0..3.0)),
            goal_distance: rng.random_range(0.0..8.0),
            velocity: Action::new(0.3, 0.0),
        };
        let s = ObservationStack::bootstrap(frame());
        let next = s.pushed(frame());
        ReplayItem {
            stack: s,
            action: rng.random_range(0..10),
            reward: rng.random_range(-1.0..1.0),
            next,
            done: rng.random_bool(0.2),
        }
    }

    #[test]
    fn target_changes_only_on_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig {
            target_update: 5,
            lr: Some(1e-3),
            ..TrainConfig::for_algorithm(super::super::Algorithm::Ddqn)
        };
        let net = Network::init(NetConfig::tiny(ActionSpace::Discrete), &mut rng).unwrap();
        let mut learner = DdqnLearner::new(net, &cfg).unwrap();
        let mut replay = ReplayBuffer::new(1000);
        for _ in 0..100 {
            replay.push(item(&mut rng));
        }
        let mut last_target = learner.target().params().to_vec();
        for k in 1..=17u64 {
            learner.update(&replay, &cfg, &mut rng).unwrap();
            let now = learner.target().params().to_vec();
            if k % 5 == 0 {
                assert_ne!(now, last_target);
                assert_eq!(now, learner.online.params());
            } else {
                assert_eq!(now, last_target, "target moved at update {k}");
            }
            last_target = now;
        }
    }

    #[test]
    fn continuous_head_is_rejected() {
        let net = Network::<f32>::zeros(NetConfig::tiny(ActionSpace::Continuous)).unwrap();
        let cfg = TrainConfig::for_algorithm(super::super::Algorithm::Ddqn);
        assert!(matches!(DdqnLearner::new(net, &cfg), Err(TrainError::ContinuousDdqn)));
    }

    #[test]
    fn repeated_updates_fit_fixed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TrainConfig {
            lr: Some(1e-3),
            gamma: Some(0.5),
            max_grad_norm: 0.0,
            ..TrainConfig::for_algorithm(super::super::Algorithm::Ddqn)
        };
        let net = Network::init(NetConfig::tiny(ActionSpace::Discrete), &mut rng).unwrap();
        let mut learner = DdqnLearner::new(net, &cfg).unwrap();
        let items: Vec<ReplayItem> = (0..16)
            .map(|_| ReplayItem {
                done: true,
                ..item(&mut rng)
            })
            .collect();
        let refs: Vec<&ReplayItem> = items.iter().collect();
        let target = learner.target().clone();
        let first = ddqn_update(&mut learner.online, &target, &mut learner.optimizer, &refs, &cfg).unwrap();
        let mut last = first.value_loss;
        for _ in 0..300 {
            last = ddqn_update(&mut learner.online, &target, &mut learner.optimizer, &refs, &cfg)
                .unwrap()
                .value_loss;
        }
        assert!(last < 0.2 * first.value_loss, "{} -> {last}", first.value_loss);
    }
}
