//! Command implementations behind the CLI: training runs, evaluation reports,
//! A* comparisons, algorithm curves and world validation.

mod compare;
mod config;
mod eval;
mod train;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use compare::{cmd_algo_compare, cmd_compare_astar, summarize, AstarComparison, Curve, CurveSummary, CURVE_BIN};
pub use config::{RunConfig, WorldEntry};
pub use eval::{
    default_grid, evaluate, run_episode, AgentRun, Controller, DriveStraight, EvalReport, EvalRow, EvalSpec,
    GreedyPolicy, PathFollower, SpinInPlace,
};
pub use train::{
    checkpoint_path, cmd_train, RunResult, TrainSummary, CHECKPOINT_DIR, EPISODES_FILE, MANIFEST_FILE, UPDATES_FILE,
};

use crate::astar::PlanError;
use crate::net::NetError;
use crate::sim::SimError;
use crate::train::TrainError;
use crate::world::{bundled_world_names, resolve_world, WorldError};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Problems with the inputs the user supplied, as opposed to failures while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::World(_)
                | HarnessError::Train(TrainError::Config(_) | TrainError::ContinuousDdqn)
        )
    }
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(io_error(path))
}

/// Loads and validates each world, or every bundled world when `worlds` is empty.
pub fn validate_worlds(worlds: &[String], robot_radius: f64) -> Vec<(String, Result<(), WorldError>)> {
    let names: Vec<String> = if worlds.is_empty() {
        bundled_world_names().map(String::from).collect()
    } else {
        worlds.to_vec()
    };
    names
        .into_iter()
        .map(|w| {
            let r = resolve_world(&w).and_then(|m| m.validate(robot_radius));
            (w, r)
        })
        .collect()
}
