//! Run configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::reward::RewardConfig;
use crate::sim::SimConfig;
use crate::train::{StopCriteria, TrainConfig, TrainSetup, WorldSetup};
use crate::world::{bundled_world_source, resolve_world};

/// One training world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldEntry {
    /// Bundled world name or path to a scenario file.
    pub world: String,
    /// Robots per instance; defaults to the world's recommended count.
    #[serde(default)]
    pub agents: Option<usize>,
    #[serde(default = "default_instances")]
    pub instances: usize,
}

fn default_instances() -> usize {
    8
}

impl WorldEntry {
    pub fn new(world: impl Into<String>, agents: usize, instances: usize) -> Self {
        Self {
            world: world.into(),
            agents: Some(agents),
            instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many updates; 0 keeps only the initial and final ones.
    pub checkpoint_every: u64,
    pub worlds: Vec<WorldEntry>,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub sim: SimConfig,
    pub stop: StopCriteria,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 100,
            worlds: ["tube", "room", "four_rooms"]
                .into_iter()
                .map(|w| WorldEntry {
                    world: w.into(),
                    agents: None,
                    instances: default_instances(),
                })
                .collect(),
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            sim: SimConfig::default(),
            stop: StopCriteria::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parses a config file. Relative world paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for w in &mut cfg.worlds {
            if bundled_world_source(&w.world).is_none() && Path::new(&w.world).is_relative() {
                w.world = base.join(&w.world).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.to_setup().map(|_| ())
    }

    /// Loads every world and checks all parameter blocks.
    pub fn to_setup(&self) -> Result<TrainSetup, HarnessError> {
        if self.sim.max_steps < 1 {
            return Err(HarnessError::Config("sim.max_steps must be >= 1".into()));
        }
        self.sim.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.reward.validate().map_err(HarnessError::Config)?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.worlds.is_empty() {
            return Err(HarnessError::Config("at least one world is required".into()));
        }
        let mut worlds = Vec::with_capacity(self.worlds.len());
        for entry in &self.worlds {
            let map = resolve_world(&entry.world)?;
            map.validate(self.sim.robot_radius)?;
            let agents = entry.agents.unwrap_or(map.recommended_agents());
            if agents == 0 || agents > map.nodes().len() || entry.instances == 0 {
                return Err(HarnessError::Config(format!(
                    "world {}: {agents} agents x {} instances with {} nodes",
                    entry.world,
                    entry.instances,
                    map.nodes().len()
                )));
            }
            worlds.push(WorldSetup {
                map: Arc::new(map),
                agents,
                instances: entry.instances,
            });
        }
        Ok(TrainSetup {
            worlds,
            sim: self.sim.clone(),
            reward: self.reward.clone(),
            train: self.train.clone(),
            stop: self.stop.clone(),
            seed: self.seed,
        })
    }
}
