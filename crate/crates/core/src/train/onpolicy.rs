//! PPO and A2C updates on a batch of collected trajectories.

use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::compute_gae;
use super::{TrainConfig, TrainError};
use crate::net::{ActionDistribution, Adam, InputBatch, Network, OutputGrads, PolicyAction};
use crate::sim::ObservationStack;

/// Rows processed per forward/backward call when accumulating gradients.
const CHUNK_ROWS: usize = 1024;

/// One step of an agent's trajectory.
#[derive(Debug, Clone)]
pub struct Transition {
    pub stack: ObservationStack,
    pub action: PolicyAction,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    /// Discounted value of the successor state credited at a timeout, else 0.
    pub bootstrap: f64,
}

/// A contiguous run of one agent slot's transitions plus the value of the
/// state after the last one (used only if that step is not terminal).
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub last_value: f64,
}

/// Flattened training data for one update.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub inputs: InputBatch<f32>,
    pub actions: Vec<PolicyAction>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PolicyBatch {
    pub fn from_trajectories(
        net: &Network<f32>,
        trajectories: &[Trajectory],
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut inputs = InputBatch::new(net.config());
        let mut actions = Vec::new();
        let mut old_log_probs = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for t in trajectories.iter().filter(|t| !t.steps.is_empty()) {
            let rewards: Vec<f64> = t.steps.iter().map(|s| s.reward + s.bootstrap).collect();
            let values: Vec<f64> = t.steps.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = t.steps.iter().map(|s| s.done).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, t.last_value, config.discount(), config.lambda);
            for s in &t.steps {
                inputs.push(&s.stack)?;
                actions.push(s.action);
                old_log_probs.push(s.log_prob);
            }
            advantages.extend(adv);
            returns.extend(ret);
        }
        if actions.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        if config.normalize_advantages {
            normalize(&mut advantages);
        }
        Ok(Self {
            inputs,
            actions,
            old_log_probs,
            advantages,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Zero mean, unit standard deviation (left centered only if the spread is zero).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs {
        *x = if std > 1e-12 { (*x - mean) / (std + 1e-8) } else { *x - mean };
    }
}

/// Clipped surrogate `min(rA, clip(r, 1-eps, 1+eps) A)` and its derivative in `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// PPO ratio objective with the given clip range.
    Clipped(f64),
    /// Plain policy gradient, `log pi(a) * A`.
    Vanilla,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Gradient norm before clipping, averaged over optimizer steps.
    pub grad_norm: f64,
    pub samples: usize,
}

impl UpdateStats {
    fn add(&mut self, o: &UpdateStats) {
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.approx_kl += o.approx_kl;
        self.clip_fraction += o.clip_fraction;
        self.grad_norm += o.grad_norm;
    }

    fn scale(&mut self, k: f64) {
        self.policy_loss *= k;
        self.value_loss *= k;
        self.entropy *= k;
        self.approx_kl *= k;
        self.clip_fraction *= k;
        self.grad_norm *= k;
    }
}

/// Mean loss over `rows` and its parameter gradient. The loss is
/// `-surrogate + value_coef * (V - R)^2 - entropy_coef * H`.
pub fn loss_and_gradient(
    net: &Network<f32>,
    batch: &PolicyBatch,
    rows: &[usize],
    surrogate: Surrogate,
    config: &TrainConfig,
) -> Result<(Vec<f32>, UpdateStats), TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let inv_n = 1.0 / rows.len() as f64;
    let mut grad = vec![0f32; net.params().len()];
    let mut stats = UpdateStats {
        samples: rows.len(),
        ..UpdateStats::default()
    };
    for chunk in rows.chunks(CHUNK_ROWS) {
        let inputs = batch.inputs.gather(chunk);
        let (out, tape) = net.forward(&inputs)?;
        let mut og = OutputGrads::<f32>::zeros(net.config(), chunk.len());
        let a = net.config().policy_outputs();
        let mut log_std_grad = vec![0.0f64; og.log_std.len()];
        for (r, &i) in chunk.iter().enumerate() {
            let dist = out.distribution(r);
            let logp = dist.log_prob(batch.actions[i]);
            let adv = batch.advantages[i];
            let log_ratio = logp - batch.old_log_probs[i];
            let (obj, d_logp) = match surrogate {
                Surrogate::Clipped(eps) => {
                    let ratio = log_ratio.exp();
                    if (ratio - 1.0).abs() > eps {
                        stats.clip_fraction += inv_n;
                    }
                    let (s, ds_dr) = clipped_surrogate(ratio, adv, eps);
                    (s, ds_dr * ratio)
                }
                Surrogate::Vanilla => (logp * adv, adv),
            };
            stats.policy_loss -= obj * inv_n;
            stats.approx_kl -= log_ratio * inv_n;
            stats.entropy += dist.entropy() * inv_n;
            let err = out.value[r] as f64 - batch.returns[i];
            stats.value_loss += err * err * inv_n;
            og.value[r] = (config.value_coef * 2.0 * err * inv_n) as f32;
            let row = &mut og.policy[r * a..(r + 1) * a];
            match (&dist, batch.actions[i]) {
                (ActionDistribution::Discrete(c), PolicyAction::Discrete(act)) => {
                    let gl = c.grad_log_prob(act);
                    let ge = c.grad_entropy();
                    for k in 0..a {
                        row[k] = ((-d_logp * gl[k] - config.entropy_coef * ge[k]) * inv_n) as f32;
                    }
                }
                (ActionDistribution::Continuous(g), PolicyAction::Continuous(u)) => {
                    let (dm, ds) = g.grad_log_prob(&u);
                    for k in 0..a {
                        row[k] = (-d_logp * dm[k] * inv_n) as f32;
                        // entropy depends on log_std only, with unit slope
                        log_std_grad[k] += (-d_logp * ds[k] - config.entropy_coef) * inv_n;
                    }
                }
                _ => return Err(TrainError::Config("action kind does not match the policy head".into())),
            }
        }
        for (g, v) in og.log_std.iter_mut().zip(&log_std_grad) {
            *g = *v as f32;
        }
        let g = net.backward(&inputs, &tape, &og)?;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((grad, stats))
}

/// Scales `grads` so their global L2 norm is at most `max_norm` (0 disables).
/// Returns the norm before scaling.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

fn apply(net: &mut Network<f32>, opt: &mut Adam<f32>, mut grad: Vec<f32>, config: &TrainConfig) -> Result<f64, TrainError> {
    let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
    if !norm.is_finite() {
        return Err(TrainError::NonFinite);
    }
    opt.step(net.params_mut(), &grad);
    Ok(norm)
}

/// PPO: `epochs` passes of shuffled minibatches over the batch.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut Network<f32>,
    opt: &mut Adam<f32>,
    batch: &PolicyBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut total = UpdateStats::default();
    let mut steps = 0usize;
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        for mb in idx.chunks(config.minibatch) {
            let (grad, mut stats) = loss_and_gradient(net, batch, mb, Surrogate::Clipped(config.clip), config)?;
            stats.grad_norm = apply(net, opt, grad, config)?;
            total.add(&stats);
            steps += 1;
        }
    }
    total.scale(1.0 / steps as f64);
    total.samples = batch.len();
    Ok(total)
}

/// A2C: one step on the whole batch in collection order.
pub fn a2c_update(
    net: &mut Network<f32>,
    opt: &mut Adam<f32>,
    batch: &PolicyBatch,
    config: &TrainConfig,
) -> Result<UpdateStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (grad, mut stats) = loss_and_gradient(net, batch, &idx, Surrogate::Vanilla, config)?;
    stats.grad_norm = apply(net, opt, grad, config)?;
    Ok(stats)
}

/// Mean clipped surrogate of the current parameters over the batch.
pub fn surrogate_objective(net: &Network<f32>, batch: &PolicyBatch, eps: f64) -> Result<f64, TrainError> {
    let (out, _) = net.forward(&batch.inputs)?;
    let n = batch.len() as f64;
    Ok((0..batch.len())
        .map(|i| {
            let ratio = (out.distribution(i).log_prob(batch.actions[i]) - batch.old_log_probs[i]).exp();
            clipped_surrogate(ratio, batch.advantages[i], eps).0
        })
        .sum::<f64>()
        / n)
}
