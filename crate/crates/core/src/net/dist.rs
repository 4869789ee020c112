//! Action distributions produced by the policy head, and the mapping from
//! head outputs to velocity commands.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::DISCRETE_ACTIONS;
use super::NetError;
use crate::sim::{Action, MAX_ANGULAR, MAX_LINEAR};

const LINEAR_LEVELS: [f64; 2] = [0.0, MAX_LINEAR];
const ANGULAR_LEVELS: [f64; 5] = [-MAX_ANGULAR, -0.75, 0.0, 0.75, MAX_ANGULAR];

/// Index `lin * 5 + ang` into the 2 x 5 velocity grid.
pub fn discretize_action(index: usize) -> Result<Action, NetError> {
    if index >= DISCRETE_ACTIONS {
        return Err(NetError::ActionIndex(index));
    }
    Ok(Action::new(
        LINEAR_LEVELS[index / ANGULAR_LEVELS.len()],
        ANGULAR_LEVELS[index % ANGULAR_LEVELS.len()],
    ))
}

/// Maps a raw Gaussian sample in normalized units to a command: each
/// component is clamped to `[-1, 1]`, then scaled to the velocity bounds.
pub fn continuous_to_action(u: [f64; 2]) -> Action {
    let c = |v: f64| v.clamp(-1.0, 1.0);
    Action::new((c(u[0]) + 1.0) * 0.5 * MAX_LINEAR, c(u[1]) * MAX_ANGULAR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyAction {
    Discrete(usize),
    Continuous([f64; 2]),
}

impl PolicyAction {
    pub fn to_action(self) -> Action {
        match self {
            PolicyAction::Discrete(i) => discretize_action(i).expect("index produced by a categorical"),
            PolicyAction::Continuous(u) => continuous_to_action(u),
        }
    }

    pub fn index(self) -> Option<usize> {
        match self {
            PolicyAction::Discrete(i) => Some(i),
            PolicyAction::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        Self {
            log_probs: logits.iter().map(|&z| z - lse).collect(),
        }
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, a: usize) -> f64 {
        self.log_probs[a]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .log_probs
            .iter()
            .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() * l })
            .sum::<f64>()
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, l) in self.log_probs.iter().enumerate() {
            let p = l.exp();
            if p > 0.0 {
                last = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Lowest index among the most probable actions.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.log_probs.iter().enumerate() {
            if l > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    /// d log p(a) / d logits.
    pub fn grad_log_prob(&self, a: usize) -> Vec<f64> {
        self.log_probs
            .iter()
            .enumerate()
            .map(|(i, l)| f64::from(u8::from(i == a)) - l.exp())
            .collect()
    }

    /// d entropy / d logits.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.log_probs
            .iter()
            .map(|&l| {
                let p = l.exp();
                if p == 0.0 {
                    0.0
                } else {
                    -p * (l + h)
                }
            })
            .collect()
    }
}

/// Diagonal Gaussian over the normalized action box.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len());
        Self { mean, log_std }
    }

    pub fn log_prob(&self, u: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(u)
            .map(|((&m, &ls), &x)| {
                let z = (x - m) * (-ls).exp();
                -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| 0.5 + 0.5 * (2.0 * PI).ln() + ls)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let e: f64 = StandardNormal.sample(rng);
                m + ls.exp() * e
            })
            .collect()
    }

    /// `(d log p / d mean, d log p / d log_std)` at sample `u`.
    pub fn grad_log_prob(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dm = Vec::with_capacity(u.len());
        let mut ds = Vec::with_capacity(u.len());
        for ((&m, &ls), &x) in self.mean.iter().zip(&self.log_std).zip(u) {
            let inv_var = (-2.0 * ls).exp();
            dm.push((x - m) * inv_var);
            ds.push((x - m) * (x - m) * inv_var - 1.0);
        }
        (dm, ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Discrete(Categorical),
    Continuous(Gaussian),
}

impl ActionDistribution {
    /// Draws an action and returns it with its log-probability. Gaussian
    /// samples are scored before the clamp in [`continuous_to_action`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (PolicyAction, f64) {
        match self {
            ActionDistribution::Discrete(c) => {
                let a = c.sample(rng);
                (PolicyAction::Discrete(a), c.log_prob(a))
            }
            ActionDistribution::Continuous(g) => {
                let u = g.sample(rng);
                let lp = g.log_prob(&u);
                (PolicyAction::Continuous([u[0], u[1]]), lp)
            }
        }
    }

    /// Greedy choice: argmax for the categorical, mean for the Gaussian.
    pub fn mode(&self) -> PolicyAction {
        match self {
            ActionDistribution::Discrete(c) => PolicyAction::Discrete(c.mode()),
            ActionDistribution::Continuous(g) => PolicyAction::Continuous([g.mean[0], g.mean[1]]),
        }
    }

    pub fn log_prob(&self, a: PolicyAction) -> f64 {
        match (self, a) {
            (ActionDistribution::Discrete(c), PolicyAction::Discrete(i)) => c.log_prob(i),
            (ActionDistribution::Continuous(g), PolicyAction::Continuous(u)) => g.log_prob(&u),
            _ => panic!("action kind does not match distribution"),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDistribution::Discrete(c) => c.entropy(),
            ActionDistribution::Continuous(g) => g.entropy(),
        }
    }
}
