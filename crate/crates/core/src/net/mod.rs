//! Policy/value network with hand-written forward and reverse passes.

mod adam;
mod checkpoint;
mod config;
mod dist;
mod layers;
mod network;
mod scalar;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{
    conv_output_len, ActionSpace, ConvSpec, NetConfig, ParamLayout, TensorSpec, CONTINUOUS_DIMS,
    DISCRETE_ACTIONS,
};
pub use dist::{
    continuous_to_action, discretize_action, ActionDistribution, Categorical, Gaussian,
    PolicyAction,
};
pub use network::{
    InputBatch, Network, OutputGrads, Outputs, Tape, GOAL_DISTANCE_SCALE, LIDAR_SCALE,
};
pub use scalar::Scalar;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("action index {0} out of range 0..10")]
    ActionIndex(usize),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for NetError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
